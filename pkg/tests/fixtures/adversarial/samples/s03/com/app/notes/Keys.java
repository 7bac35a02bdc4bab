package com.app.notes;

import java.security.Signature;
import javax.crypto.Cipher;

public class Keys {
    public void sign(String name) throws Exception {
        Cipher rsa = Cipher.getInstance("RSA/ECB/PKCS1Padding");
        Signature s1 = Signature.getInstance("SHA1withRSA");
        Signature s2 = Signature.getInstance(name);
        String msg = "Signature.getInstance(\"MD5withRSA\") // not code";
    }
}
